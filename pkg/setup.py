"""Build the optional Cython kernels; the package falls back to numpy without them."""
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "kinjoint.engine._kernels",
                ["src/kinjoint/engine/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
