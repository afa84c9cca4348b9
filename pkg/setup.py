"""Builds the optional compiled RK4 kernel. A failed build is not fatal:
the package falls back to the pure-numpy sweep at import time."""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Continue without the extension if the local toolchain cannot build it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: compiled kernel skipped ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: {ext.name} skipped ({exc}); using numpy fallback")


try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mfgkit._ricc_kernel",
                ["src/mfgkit/_ricc_kernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:  # pragma: no cover - cython not installed
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
