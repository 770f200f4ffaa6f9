from setuptools import setup, find_packages

setup(
    name="lesiontag",
    version="1.0.0",
    description="Skin disease diagnosis and lesion-tag classification toolkit",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["config", "app"],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.21.0",
        "scipy>=1.7.0",
        "pandas",
        "scikit-learn",
        "Pillow>=9.0.0",
        "pydantic>=2.0.0",
        "python-dotenv",
        "typer>=0.9.0",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "lesiontag=src.cli.main:app",
        ],
    },
)
