"""Build hook for the optional Cython kernels.

The package is fully functional without a compiler; ``sdce.kernels`` falls
back to the numpy implementation when the extension is absent.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SDCE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "sdce._kernels",
                    ["src/sdce/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
