from setuptools import setup, find_packages

setup(
    name="srl-ood",
    version="0.1.0",
    description="Out-of-distribution text detection with semantic-role pooled features",
    author="SRL-OOD Team",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pandas>=2.0",
        "pydantic>=2.0.0",
        "python-dotenv>=1.0.0",
        "mcp>=1.4.0,<2",
    ],
    extras_require={
        "test": [
            "pytest>=7.0",
            "scikit-learn>=1.3",
        ],
    },
    entry_points={
        "console_scripts": [
            "srl-ood=srl_ood.cli:main",
            "srl-ood-mcp=srl_ood.server:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
)
