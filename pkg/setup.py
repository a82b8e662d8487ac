"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: facet._kernels falls
back to the vectorized numpy implementation when `facet._kernels._core` is
missing or fails to build.  Set FACET_SKIP_EXT=1 to skip the build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Compile the kernels if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(f"WARNING: compiled kernels not built ({exc}); "
              "falling back to the pure-numpy implementation")


def extensions():
    if os.environ.get("FACET_SKIP_EXT"):
        return []
    try:
        import numpy
    except ImportError as exc:
        optional_build_ext._warn(exc)
        return []
    ext = Extension(
        "facet._kernels._core",
        sources=["src/facet/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        from Cython.Build import cythonize
    except ImportError:
        # Build from the checked-in generated C so installs without Cython
        # still get the compiled kernels.
        ext.sources = ["src/facet/_kernels/_core.c"]
        return [ext]
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
