"""Dataset records, file formats, synthetic generation and perturbations."""
