"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure numpy backend is selected at
import time), so a missing compiler only costs speed, not functionality.
"""

import sys

from setuptools import setup
from setuptools.errors import CompileError


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "igdistill.kernels._native",
        ["src/igdistill/kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


try:
    setup(ext_modules=extensions())
except (CompileError, SystemExit):
    print("igdistill: native kernel build failed; installing pure-python "
          "backend only", file=sys.stderr)
    setup(ext_modules=[])
