"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import); building it just makes the hot loops faster.  Keep IEEE
semantics: no -ffast-math, no FP contraction, so compiled and fallback kernels
produce bit-identical results.
"""

import os

import numpy as np
from setuptools import setup

try:
    if not os.path.exists("src/sdgames/_kernels/_core.pyx"):
        raise ImportError("kernel source not present")
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "sdgames._kernels._core",
                ["src/sdgames/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
