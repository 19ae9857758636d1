"""Builds the optional compiled packet kernel.

If Cython or a C compiler is missing the package installs without it and
the pure-Python kernel is used.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            sys.stderr.write(f"warning: compiled kernel not built ({exc}); using the pure-Python kernel\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            sys.stderr.write(f"warning: building {ext.name} failed ({exc}); using the pure-Python kernel\n")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        sys.stderr.write("warning: Cython not available; using the pure-Python kernel\n")
        return []
    from setuptools import Extension

    ext = Extension(
        "tcpslice.simengine._ckernel",
        ["src/tcpslice/simengine/_ckernel.pyx"],
        # identical rounding to the Python kernel: no fused multiply-add
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
