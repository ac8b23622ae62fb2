from setuptools import setup, find_packages
import os

# Set umask to get standard permissions (rwxr-xr-x for dirs, rw-r--r-- for files)
os.umask(0o022)

setup(
    name="pymcgs",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={
        "pymcgs": ["data/*.json"],
    },
    install_requires=[
        "click>=8.0.0",  # For CLI interface and console output
        "numpy>=1.22",  # For seeded generators and landscape tables
        "httpx>=0.24",  # For the chat-completion engine adapter
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "pymcgs=pymcgs.cli:main",
        ],
    },
    author="Eric Wheeler",
    description="Monte Carlo graph search for iterative solution refinement",
    long_description=open('README.md').read(),
    long_description_content_type="text/markdown",
    python_requires=">=3.8",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
