# Engine package: numeric core, online heads, pipeline, training and configuration
