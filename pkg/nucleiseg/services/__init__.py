"""Pipeline services: volume I/O, preprocessing, patching, training, evaluation, phantom generation."""
