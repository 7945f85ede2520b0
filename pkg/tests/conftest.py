import pytest

from cytoprobe import catalog, diffusion, gan


def build_test_corpus(directory, n_phantoms_per_class=5, n_synth_per_class=3):
    """Small but study-capable corpus: phantoms plus untrained cgan/dm samples."""
    records = catalog.render_phantom_corpus(n_phantoms_per_class, seed=0)

    gan_cfg = gan.GanConfig(
        data_dim=gan.IMAGE_DIM, num_classes=7, noise_dim=4, hidden=(8, 8, 8, 8), seed=1
    )
    records += gan.synthesize_corpus(gan.build_model(gan_cfg), n_synth_per_class, seed=2)

    dm_cfg = diffusion.DiffusionConfig(
        data_dim=diffusion.IMAGE_DIM, num_classes=7, hidden=(8, 8, 8, 8), seed=3
    )
    schedule = diffusion.NoiseSchedule.linear(10)
    records += diffusion.synthesize_corpus(
        diffusion.build_denoiser(dm_cfg), schedule, n_synth_per_class, seed=4
    )
    catalog.save_corpus(records, directory)
    return records


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Corpus with 35 phantoms, 21 cgan and 21 dm records (7 classes)."""
    directory = tmp_path_factory.mktemp("corpus")
    build_test_corpus(directory)
    return directory
