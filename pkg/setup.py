"""Build script: compiles the optional fast kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the build therefore tolerates a missing compiler or
Cython installation.
"""

import os

import numpy
from setuptools import Extension, setup

PYX = os.path.join("src", "aqsim", "_kernels_fast.pyx")

extensions = []
if os.path.exists(PYX):
    try:
        from Cython.Build import cythonize

        extensions = cythonize(
            [
                Extension(
                    "aqsim._kernels_fast",
                    [PYX],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API",
                                    "NPY_1_7_API_VERSION")],
                    # keep float contraction off so the compiled path is
                    # bit-identical to the numpy reference kernels
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=extensions)
