import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RIDEPOOL_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ridepool._kernels._vrp_c",
                    ["src/ridepool/_kernels/_vrp_c.pyx"],
                )
            ],
            language_level="3",
        )
    except ImportError:
        # No Cython: the package still works on the pure-Python kernel.
        ext_modules = []

setup(ext_modules=ext_modules)
