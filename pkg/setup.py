"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-numpy
fallback is selected at import time); building it just makes the hot
loops (selective scan, Chamfer nearest-neighbour, polygon rasterization)
considerably faster.
"""

import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "cadseq.kernels._ext",
                sources=["src/cadseq/kernels/_ext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
