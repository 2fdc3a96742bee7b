"""Channel coding primitives: CRC, scrambling, convolutional and turbo codes, rate matching."""
