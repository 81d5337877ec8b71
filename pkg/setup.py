import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# optional: a failed compile leaves the pure-python kernels in charge
ext = Extension(
    "rienhance._kernels",
    ["src/rienhance/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))
