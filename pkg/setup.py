from setuptools import find_packages, setup

with open("requirements.txt") as install_requires_file:
    install_requires = install_requires_file.read().strip().split("\n")

with open("requirements-dev.txt") as dev_requires_file:
    dev_requires = dev_requires_file.read().strip().split("\n")

with open("README.md") as readme_file:
    readme = readme_file.read()

version = {}
with open("prefect_rbf_fmm/_version.py") as version_file:
    exec(version_file.read(), version)

setup(
    name="prefect-rbf-fmm",
    description="Band-limited RBF fast multipole summation and interpolation as Prefect flows.",
    license="Apache License 2.0",
    author="Prefect Technologies, Inc.",
    author_email="help@prefect.io",
    keywords="prefect",
    url="https://github.com/PrefectHQ/prefect-rbf-fmm",
    long_description=readme,
    long_description_content_type="text/markdown",
    version=version["__version__"],
    packages=find_packages(exclude=("tests", "docs")),
    python_requires=">=3.8",
    install_requires=install_requires,
    extras_require={"dev": dev_requires},
    entry_points={
        "prefect.collections": [
            "prefect_rbf_fmm = prefect_rbf_fmm",
        ],
        "console_scripts": [
            "rbf-fmm = prefect_rbf_fmm.cli:app",
        ],
    },
    classifiers=[
        "Natural Language :: English",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Software Development :: Libraries",
    ],
)
