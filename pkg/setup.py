"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-Python backend is selected
at import time), so any failure to cythonize or compile is non-fatal.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: skipping Cython kernel build ({exc}); "
                  "falling back to the pure-Python backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "falling back to the pure-Python backend")


ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/ngpkit/_kernels/_ckern.pyx"],
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        ext.extra_compile_args = ["-O3"]
except ImportError:
    print("warning: Cython not available; building without the compiled kernels")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
