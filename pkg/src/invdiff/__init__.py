"""Recovery of diffusion and potential coefficients from final-time data."""
