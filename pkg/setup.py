"""Build script: compiles the optional Cython hot-kernel extension.

The package is fully functional without the extension (a vectorised numpy
implementation of every kernel is selected at import time), so a failing
compiler or a missing Cython must not fail the install.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, otherwise continue without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain specific
            print(f"warning: skipping compiled kernels ({exc}); "
                  "falling back to the numpy implementation")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain specific
            print(f"warning: failed to compile {ext.name} ({exc}); "
                  "falling back to the numpy implementation")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "gftree._hot._core",
                ["src/gftree/_hot/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
