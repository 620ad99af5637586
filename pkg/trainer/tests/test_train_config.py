"""Configuration defaults, the printable recipe, and weight scaling."""

from fractions import Fraction

import pytest

from mechact_trainer import ConfigError, TrainConfig, format_hparam, lambda_scale


class TestPhaseDefaults:
    def test_supervised_phase_defaults(self):
        config = TrainConfig("imao")
        assert config.epochs == 4
        assert config.batch_size == 8
        assert config.learning_rate == 1e-6
        assert config.scheduler == "cosine"
        assert config.warmup_ratio == 0.1

    def test_preference_phase_defaults(self):
        config = TrainConfig("maao")
        assert config.epochs == 2
        assert config.batch_size == 16
        assert config.learning_rate == 1e-7
        assert config.scheduler == "cosine"
        assert config.warmup_ratio == 0.1
        assert config.lambda_ratio_target == Fraction(4, 3)

    def test_overrides_survive(self):
        config = TrainConfig("imao", epochs=1, learning_rate=1e-3, batch_size=2)
        assert (config.epochs, config.batch_size, config.learning_rate) == (1, 2, 1e-3)

    def test_printed_recipe_is_byte_stable(self):
        # The printout is the contract: these exact value strings.
        assert TrainConfig("imao").describe() == (
            "phase: imao\n"
            "epochs: 4\n"
            "batch size: 8\n"
            "learning rate: 1e-6\n"
            "learning rate scheduler: cosine\n"
            "warmup ratio: 0.1"
        )
        assert TrainConfig("maao").describe() == (
            "phase: maao\n"
            "epochs: 2\n"
            "batch size: 16\n"
            "learning rate: 1e-7\n"
            "learning rate scheduler: cosine\n"
            "warmup ratio: 0.1\n"
            "beta: 0.1\n"
            "lambda ratio target: 4/3"
        )

    def test_format_hparam(self):
        assert format_hparam(1e-6) == "1e-6"
        assert format_hparam(1e-7) == "1e-7"
        assert format_hparam(0.1) == "0.1"
        assert format_hparam(3e-4) == "0.0003"
        assert format_hparam(Fraction(4, 3)) == "4/3"
        assert format_hparam(16) == "16"


class TestValidation:
    def test_unknown_phase(self):
        with pytest.raises(ConfigError, match="unknown phase"):
            TrainConfig("pretrain")

    def test_unknown_scheduler(self):
        with pytest.raises(ConfigError, match="unknown scheduler"):
            TrainConfig("imao", scheduler="linear")

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"epochs": 0}, "epochs"),
            ({"batch_size": 0}, "batch size"),
            ({"learning_rate": 0.0}, "learning rate"),
            ({"learning_rate": -1e-6}, "learning rate"),
            ({"warmup_ratio": 1.0}, "warmup ratio"),
            ({"warmup_ratio": -0.1}, "warmup ratio"),
            ({"beta": 0.0}, "beta"),
            ({"z0_mode": "fixed"}, "z0 mode"),
            ({"z0": -0.5}, "z0"),
        ],
    )
    def test_bad_values(self, kwargs, message):
        with pytest.raises(ConfigError, match=message):
            TrainConfig("imao", **kwargs)

    def test_json_dict_round_trips_the_ratio(self):
        payload = TrainConfig("maao").to_json_dict()
        assert payload["lambda_ratio_target"] == "4/3"
        assert payload["phase"] == "maao"


class TestLambdaScale:
    def test_balanced_at_twenty_fifteen(self):
        # (4/3) * (15/20) is exactly one: equal per-sample weights.
        assert lambda_scale(20, 15) == Fraction(1)

    def test_exact_fraction(self):
        assert lambda_scale(4, 1) == Fraction(1, 3)
        assert lambda_scale(16, 34) == Fraction(17, 6)

    def test_target_identity_holds_exactly(self):
        for n_d, n_u in [(1, 1), (7, 13), (20, 15), (1000, 1)]:
            scale = lambda_scale(n_d, n_u)
            assert scale * Fraction(n_d) == Fraction(4, 3) * Fraction(n_u)

    def test_needs_both_labels(self):
        with pytest.raises(ConfigError, match="both labels"):
            lambda_scale(0, 5)
        with pytest.raises(ConfigError, match="both labels"):
            lambda_scale(5, 0)
