import os

from setuptools import Extension, setup


def build_ext_modules():
    # The compiled kernels are optional: rfnet.kernels falls back to numpy.
    if os.environ.get("RFNET_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "rfnet._ckernels",
        ["src/rfnet/_ckernels.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=build_ext_modules())
