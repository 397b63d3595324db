from setuptools import setup, find_packages

setup(
    name="focus_focus_toolkit",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.11.0",
        "pyyaml>=6.0.0",
        "pydantic>=2.0.0",
        "python-dotenv>=1.0.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0", "pytest-cov>=6.0.0"],
    },
    entry_points={
        "console_scripts": ["ffmono=src.cli.main:main"],
    },
    python_requires=">=3.9",
    description="Numerical monodromy and action regularization near focus-focus singularities",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3.9",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
