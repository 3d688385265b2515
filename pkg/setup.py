from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "bundlesup.kernels._speedups",
                ["src/bundlesup/kernels/_speedups.pyx"],
                extra_compile_args=["-O3"],
                # pure-NumPy fallback is selected at import when this is absent
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
