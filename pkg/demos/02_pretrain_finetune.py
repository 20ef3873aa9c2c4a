# coding: utf-8

# # Pre-training then fine-tuning a tiny model
#
# A tiny selective-scan encoder learns to rebuild masked strides, then
# the same backbone is fine-tuned to tell three traffic classes apart.
# Takes about a minute on one core.

from netmamba.experiments import learning_corpus, learning_trial

train, val, test = learning_corpus(seed=0, n_flows=600)
print(len(train), "train /", len(val), "val /", len(test), "test flows")

# ## One run
#
# 90% of strides are hidden from the encoder in every pre-training step.
# The reconstruction error on hidden strides should fall quickly.

trial = learning_trial(train, val, test, block_kind="mamba", multimodal=False, seed=0, pretrain_steps=100)
print(f"stride loss {trial.recon_first:.4f} -> {trial.recon_last:.4f} "
      f"({100 * trial.recon_reduction:.0f}% lower)")
print(f"fine-tuned for {trial.epochs} epochs, test accuracy {trial.test_accuracy:.3f}")

# ## The multimodal variant
#
# Adding size and interval tokens gives the encoder timing information
# and two more reconstruction targets.

trial = learning_trial(train, val, test, block_kind="mamba", multimodal=True, seed=0, pretrain_steps=100)
print(f"multimodal: stride loss down {100 * trial.recon_reduction:.0f}%, test accuracy {trial.test_accuracy:.3f}")
