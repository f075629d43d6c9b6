"""Build script for the optional Cython speedups extension.

The package is fully functional without the extension (pure-numpy kernels are
selected at import when pcbgnn._speedups is missing), so the build degrades
gracefully when Cython or a C compiler is unavailable.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "pcbgnn._speedups",
                ["src/pcbgnn/_speedups.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
