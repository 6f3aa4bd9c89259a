# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
