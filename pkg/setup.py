import numpy
from setuptools import setup, Extension
from Cython.Build import cythonize

# -ffp-contract=off keeps the float arithmetic bit-identical to the
# pure-numpy fallback (no fused multiply-add in the distance kernels).
ext = Extension(
    "recurrence_lab._kernels",
    ["src/recurrence_lab/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    extra_compile_args=["-O3", "-ffp-contract=off"],
    optional=True,
)

setup(
    ext_modules=cythonize([ext], language_level="3"),
)
