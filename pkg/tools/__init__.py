"""SqzLab library modules: parameters, quantum states, noise model, loss chains, spectra and fitting."""
