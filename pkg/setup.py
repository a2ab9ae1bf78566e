"""Build the optional compiled kernels. The package works without them.

    python setup.py build_ext --inplace
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("RLDARTS_NO_EXT", "") not in ("1", "true", "yes"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "rldarts.diffcore._kernels",
                    ["src/rldarts/diffcore/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
