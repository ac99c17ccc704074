#  OpenSSCR: Open self-supervised counterfactual reasoning for iterative image editing.
#  Copyright (C) 2020  The OpenSSCR developers
#
#  This program is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  This program is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with this program.  If not, see <https://www.gnu.org/licenses/>.

from setuptools import setup
from version import version
long_description = 'Self-supervised counterfactual reasoning for iterative language-based image editing.'

setup(name='OpenSSCR',
      version=str(version),
      description='Open self-supervised counterfactual reasoning for iterative image editing.',
      long_description=long_description,
      author='The OpenSSCR developers',
      author_email='',
      url='',
      package_dir={'sscr':'src'},
      packages=['sscr'],
      scripts=['bin/sscr'],
      install_requires=["numpy", "scipy", "pandas", "matplotlib", "seaborn", "astropy", "numba", "tqdm", "nltk",
                        "semantic_version"],
      package_data={'': ['data/*']},
      include_package_data=True,
      license='GPLv3',
      classifiers=[
          "Topic :: Scientific/Engineering :: Artificial Intelligence",
          "Intended Audience :: Science/Research",
          "Intended Audience :: Developers",
          "Development Status :: 3 - Alpha",
          "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
          "Operating System :: OS Independent",
          "Programming Language :: Python"
      ]
     )
