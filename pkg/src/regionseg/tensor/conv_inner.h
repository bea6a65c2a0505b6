/* Inner loops for the 3x3x3 convolution kernels.
 *
 * All routines work on a per-sample "flat padded" layout: a (C, P) row-major
 * buffer where P = (X+2)(Y+2)(Z+2) and the one-voxel zero border is part of
 * the buffer. A spatial tap (i, j, k) is then a constant shift `off` in the
 * flat index, so every tap reads a contiguous run of memory.
 *
 * Accumulation order is fixed (input channel major, tap minor) so results are
 * identical run to run.
 */
#ifndef REGIONSEG_CONV_INNER_H
#define REGIONSEG_CONV_INNER_H

#include <stddef.h>
#include <string.h>

#define RS_BLOCK 256

/* out[co][q] += sum_ci sum_t w[co][ci][t] * x[ci][q + off[t]] for q in [lo, hi).
 * w is (cout, cin, ntap) contiguous. */
static void rs_conv_flat(const double *x, const double *w, const ptrdiff_t *off,
                         ptrdiff_t cin, ptrdiff_t cout, ptrdiff_t ntap, ptrdiff_t P,
                         ptrdiff_t lo, ptrdiff_t hi, double *out)
{
    for (ptrdiff_t q0 = lo; q0 < hi; q0 += RS_BLOCK) {
        ptrdiff_t q1 = q0 + RS_BLOCK < hi ? q0 + RS_BLOCK : hi;
        ptrdiff_t co = 0;
        for (; co + 4 <= cout; co += 4) {
            double *o0 = out + (co + 0) * P;
            double *o1 = out + (co + 1) * P;
            double *o2 = out + (co + 2) * P;
            double *o3 = out + (co + 3) * P;
            for (ptrdiff_t ci = 0; ci < cin; ci++) {
                const double *xc = x + ci * P;
                for (ptrdiff_t t = 0; t < ntap; t++) {
                    const double w0 = w[((co + 0) * cin + ci) * ntap + t];
                    const double w1 = w[((co + 1) * cin + ci) * ntap + t];
                    const double w2 = w[((co + 2) * cin + ci) * ntap + t];
                    const double w3 = w[((co + 3) * cin + ci) * ntap + t];
                    const double *xp = xc + off[t];
                    for (ptrdiff_t q = q0; q < q1; q++) {
                        const double xv = xp[q];
                        o0[q] += w0 * xv;
                        o1[q] += w1 * xv;
                        o2[q] += w2 * xv;
                        o3[q] += w3 * xv;
                    }
                }
            }
        }
        for (; co < cout; co++) {
            double *o0 = out + co * P;
            for (ptrdiff_t ci = 0; ci < cin; ci++) {
                const double *xc = x + ci * P;
                for (ptrdiff_t t = 0; t < ntap; t++) {
                    const double w0 = w[(co * cin + ci) * ntap + t];
                    const double *xp = xc + off[t];
                    for (ptrdiff_t q = q0; q < q1; q++)
                        o0[q] += w0 * xp[q];
                }
            }
        }
    }
}

#define RS_LANES 8

/* gw[co][ci][t] += sum_q g[co][q] * x[ci][q + off[t]] for q in [lo, hi).
 * q is blocked for cache reuse; within a block each tap keeps 8 lane partial
 * sums that are reduced in lane order, then the scalar tail is added. */
static void rs_conv_wgrad(const double *x, const double *g, const ptrdiff_t *off,
                          ptrdiff_t cin, ptrdiff_t cout, ptrdiff_t ntap, ptrdiff_t P,
                          ptrdiff_t lo, ptrdiff_t hi, double *gw)
{
    for (ptrdiff_t q0 = lo; q0 < hi; q0 += 2 * RS_BLOCK) {
        ptrdiff_t q1 = q0 + 2 * RS_BLOCK < hi ? q0 + 2 * RS_BLOCK : hi;
        for (ptrdiff_t co = 0; co < cout; co++) {
            const double *gc = g + co * P;
            for (ptrdiff_t ci = 0; ci < cin; ci++) {
                const double *xc = x + ci * P;
                double *dst = gw + (co * cin + ci) * ntap;
                for (ptrdiff_t t = 0; t < ntap; t++) {
                    const double *xp = xc + off[t];
                    double a[RS_LANES] = {0};
                    ptrdiff_t q = q0;
                    for (; q + RS_LANES <= q1; q += RS_LANES)
                        for (int l = 0; l < RS_LANES; l++)
                            a[l] += gc[q + l] * xp[q + l];
                    double s = 0.0;
                    for (int l = 0; l < RS_LANES; l++)
                        s += a[l];
                    for (; q < q1; q++)
                        s += gc[q] * xp[q];
                    dst[t] += s;
                }
            }
        }
    }
}

#endif
