# Models package for stream windows and the frozen network
