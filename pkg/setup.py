"""Build the optional compiled kernels.

If the extension fails to compile the package still installs and the numpy
kernels are used instead.
"""
import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

# no FMA contraction: keeps the compiled conv bit-identical to a naive loop.
# -fno-wrapv undoes the CPython default that blocks loop vectorization.
compile_args = ["-O3", "-ffp-contract=off", "-fno-wrapv"]
if os.environ.get("REGIONSEG_PORTABLE") != "1":
    compile_args.append("-march=native")


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            sys.stderr.write(f"warning: compiled kernels not built ({exc}); using numpy fallback\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            sys.stderr.write(f"warning: failed to build {ext.name} ({exc}); using numpy fallback\n")


ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "regionseg.tensor._kernels",
                ["src/regionseg/tensor/_kernels.pyx"],
                include_dirs=[np.get_include(), "src/regionseg/tensor"],
                extra_compile_args=compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
