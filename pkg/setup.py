import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    HAVE_CYTHON = True
except ImportError:
    cythonize = None
    HAVE_CYTHON = False

# The compiled kernels are optional: without Cython the package installs
# pure-Python and examgen.neural falls back to the numpy implementation.
if HAVE_CYTHON:
    extensions = cythonize(
        [
            Extension(
                "examgen.neural._kernels",
                ["src/examgen/neural/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    extensions = []

setup(ext_modules=extensions)
