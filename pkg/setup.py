from setuptools import setup, find_packages

setup(
    name="autocf-engine",
    version="0.1.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "SQLAlchemy==2.0.28",
        "numpy==1.26.4",
        "scipy==1.12.0",
        "pandas==2.2.1",
        "python-dotenv==1.0.1",
        "tabulate==0.9.0"
    ],
    python_requires=">=3.9",
    description="Graph collaborative filtering with learned masking and attention-based reconstruction",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
