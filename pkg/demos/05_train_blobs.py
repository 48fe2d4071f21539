"""End-to-end training on the synthetic blob set.

Trains a small model for a few epochs, prints the history table, then
round-trips the result through a checkpoint and re-evaluates.
"""

import tempfile
from pathlib import Path

from capsnet import (CapsuleClassifier, ModelConfig, TrainConfig, evaluate,
                     fit, init_train_state, load_checkpoint, make_blobs,
                     save_checkpoint)


def main():
    x_train, y_train = make_blobs(1500, num_classes=4, image_size=16, seed=0)
    x_test, y_test = make_blobs(400, num_classes=4, image_size=16, seed=1)
    print(f"train {x_train.shape}, test {x_test.shape}, "
          f"classes {sorted(set(y_train.tolist()))}")

    config = ModelConfig(input_shape=(16, 16, 1), num_classes=4,
                         stem_widths=(8, 16, 16, 32), stage_depths=(1, 1, 1))
    model = CapsuleClassifier(config)
    state = init_train_state(model, TrainConfig(epochs=3, batch_size=64,
                                                base_lr=0.01, seed=0))
    print(f"model: {model.num_primary} primary capsules, "
          f"{sum(t.size for t in state.params.values()):,} parameters\n")

    fit(model, state, (x_train, y_train), eval_data=(x_test, y_test), verbose=True)

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "checkpoint"
        save_checkpoint(ckpt, config, state)
        cfg2, state2 = load_checkpoint(ckpt)
        model2 = CapsuleClassifier(cfg2)
        before = evaluate(model, state.params, state.stats, x_test, y_test)
        after = evaluate(model2, state2.params, state2.stats, x_test, y_test)
        print(f"\ncheckpoint round trip: acc {before['accuracy']:.4f} -> "
              f"{after['accuracy']:.4f} (bit-exact: {before == after})")


if __name__ == "__main__":
    main()
