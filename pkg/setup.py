"""Build the optional Cython kernels.

The package works without them: ``hypad._kernels`` falls back to numpy
implementations when the extension is missing.  Set
``HYPAD_PORTABLE_BUILD=1`` to drop ``-march=native``.
"""
import os
import sys

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: kernel extension not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback", file=sys.stderr)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    flags = ["-O3", "-ffast-math", "-fopenmp-simd"]
    if not os.environ.get("HYPAD_PORTABLE_BUILD"):
        flags.append("-march=native")
    ext = Extension(
        "hypad._kernels._core",
        ["src/hypad/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=flags,
        extra_link_args=["-lm"],
    )
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
