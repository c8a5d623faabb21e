from setuptools import setup, find_packages

setup(
    name='vrelax',
    version='1.0.0',
    description='Relaxation and stimulated-transition operators for degenerate V-type atoms',
    packages=find_packages(include=['vrelax', 'vrelax.*']),
    python_requires='>=3.9',
    install_requires=[
        'Flask==2.3.3',
        'Flask-CORS==4.0.0',
        'psutil==5.9.6',
        'numpy==1.26.4',
        'scipy==1.11.4',
    ],
    entry_points={
        'console_scripts': ['vrelax=vrelax.cli:main'],
    },
)
