from dualmem import DualMemoryModel, GradientTape, RunConfig, build_model


def test_imports():
    import dualmem  # noqa: F401
    import evalkit  # noqa: F401
    import scenegen  # noqa: F401
    from dualmem import cli, export, pipeline  # noqa: F401

    assert DualMemoryModel is not None
    assert GradientTape is not None
    assert RunConfig is not None
    assert build_model is not None
