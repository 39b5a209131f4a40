"""
Help text for the StreamHead subcommands, one item per command in the order
the experiment runs them.
"""

from dataclasses import dataclass
from typing import List, Optional


@dataclass
class HelpItem:
    """A single help item with title and description."""
    title: str
    summary: str
    description: str


COMMAND_HELP: List[HelpItem] = [
    HelpItem(
        "gen-data",
        "Generate the synthetic fan corpora",
        "Writes corpora/train_normal.csv plus one test corpus per fan mode "
        "(normal, stuck, tilted). Files are bit-identical for a given seed.",
    ),
    HelpItem(
        "train",
        "Fit preprocessing and train the frozen autoencoder",
        "Fits PCA + min-max scaling on the normal training corpus, trains the "
        "40-16-4-16-40 autoencoder and writes model.tolm, preproc.tolp, the loss "
        "curve and reconstruction-error histograms. Fails the run (exit 3) when "
        "abnormal windows are not at least twice as hard to reconstruct.",
    ),
    HelpItem(
        "finetune",
        "Drift the sensor and fine-tune the output layer online",
        "Applies the configured drift, records the frozen model's error histogram, "
        "fine-tunes a regression head for --iterations windows, then records the "
        "post-fine-tune histogram and a per-iteration timing table.",
    ),
    HelpItem(
        "classify",
        "Learn the three fan modes online, class block by class block",
        "Streams labelled windows (normal, stuck, tilted, repeated), growing the "
        "softmax head when a class first appears, and evaluates macro-F1 on the "
        "fixed test corpora every --eval-every steps.",
    ),
    HelpItem(
        "baseline",
        "Train offline softmax baselines on the same features",
        "Trains batch softmax heads over an epoch sweep and a dataset-size sweep "
        "and compares them with the online classifier's final macro-F1.",
    ),
    HelpItem(
        "bench",
        "Time inference against online learning per iteration",
        "Reports average, median, minimum and maximum microseconds per window "
        "for inference-only and online-learning iterations.",
    ),
    HelpItem(
        "gradcheck",
        "Check every analytic gradient against finite differences",
        "Runs the bce, mse-sigmoid and softmax head checks and the backprop check; "
        "exits 3 when any maximum relative error reaches 1e-3.",
    ),
]


def find_help(title: str) -> Optional[HelpItem]:
    """Look up a command's help item by name."""
    for item in COMMAND_HELP:
        if item.title == title:
            return item
    return None
