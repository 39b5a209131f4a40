# UI package for the command-line surface
