# Utils package for simulation, file formats and metrics
