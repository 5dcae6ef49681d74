"""
To build distribution: python setup.py sdist bdist_wheel
"""
import os
import setuptools

pkg_name = "otsieve"
version = "0.1.0"

# read long description from readme.md
base_dir = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(base_dir, "readme.md")) as fd:
    long_description = fd.read()

setuptools.setup(
    name=pkg_name,
    version=version,
    description=(
        "Sieve estimation of multidimensional matching models via optimal"
        " transport"
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
    ],
    keywords="optimal transport matching sieve estimation labor economics",
    include_package_data=True,
    packages=[pkg_name],
    package_data={pkg_name: ["settings.json", "configs/*.json"]},
    python_requires=">=3.8, <4",
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.7",
        "pandas>=1.3",
        "joblib>=1.0",
    ],
    extras_require={"testing": ["pytest", "black", "flake8"]},
    entry_points={"console_scripts": ["otsieve=otsieve.cli:main"]},
)
