from setuptools import setup, find_packages

setup(name='dmrseg',
      version='0.1',
      description='Distance-map regularized multi-task training of segmentation networks, from scratch in numpy',
      python_requires='>=3.8',
      license='Apache-2',
      # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
      classifiers=[
            # How mature is this project? Common values are
            #   3 - Alpha
            #   4 - Beta
            #   5 - Production/Stable
            'Development Status :: 3 - Alpha',

            # Indicate who your project is intended for
            'Intended Audience :: Science/Research',
            'Topic :: Scientific/Engineering :: Medical Science Apps.',
            'Topic :: Scientific/Engineering :: Image Recognition',

            # Pick your license as you wish (should match "license" above)
            'License :: OSI Approved :: Apache Software License',

            'Programming Language :: Python :: 3'
      ],
      # What does your project relate to?
      keywords='segmentation distance-transform multi-task cardiac-mri',
      packages=find_packages(exclude=['test']),
      install_requires=[
            'numpy>=1.20',
            'scipy>=1.6',
            'pandas>=1.2',
            'matplotlib>=3.3'
      ],
      entry_points={
            'console_scripts': ['dmrseg = dmrseg.cli:main']
      },
      test_suite='test')
