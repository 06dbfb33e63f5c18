import hypothesis

# property tests run numeric kernels whose wall time varies with the draw;
# wall-clock deadlines only add flakiness on loaded machines
hypothesis.settings.register_profile(
    "package-default",
    deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("package-default")
