from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "homoglab.kernels._corec",
        ["src/homoglab/kernels/_corec.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
