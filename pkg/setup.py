"""Build script for the optional compiled convolution kernels.

The package is fully functional without a C toolchain: if the extension
fails to build (or ADASEG_SKIP_EXT is set), installation proceeds and the
numpy fallback kernels are selected at import time.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain
            print(f"warning: skipping compiled kernels ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); numpy fallback will be used")


def extensions():
    if os.environ.get("ADASEG_SKIP_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available; numpy fallback will be used")
        return []
    ext = Extension(
        "adaseg._kernels._cyconv",
        sources=["src/adaseg/_kernels/_cyconv.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
