"""
Clip List Export Script

Writes the built-in short-term clip selection of a prepared run to a clip list
file (`action,file_id,start` per line). The file can be edited, swapped for a
reference selection, and fed back through `evaluate --clip-list`.

This is typically only needed once per dataset, unless:
- The clip seed or clips per action change
- The test subjects change
- A reference selection needs to be compared line by line
"""

import argparse
import os
import sys

project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from tools.config import RunConfig, get_config
from tools.errors import HS2SError
from tools.evalbench import select_clips, write_clip_list
from tools.pipeline import load_prepared


def main(argv=None) -> bool:
    """
    Load the prepared test split, run the clip selection and write it.

    Returns:
        True when the list was written
    """
    parser = argparse.ArgumentParser(description="Export the built-in clip selection")
    parser.add_argument("--config", help="run file")
    parser.add_argument("--output-dir", help="run directory holding the prepared dataset")
    parser.add_argument("--out", default="clips.csv", help="clip list path")
    args = parser.parse_args(argv)

    overrides = {"output_dir": args.output_dir} if args.output_dir else None
    try:
        run = RunConfig.from_sources(get_config(), args.config, overrides)
        prepared = load_prepared(run)
        present = {seq.action for seq in prepared.test}
        actions = [a for a in prepared.vocab.names if a in present]
        selection = select_clips(prepared.test, actions, run.clips_per_action, run.clip_seed)
        path = write_clip_list(selection, args.out)
    except HS2SError as e:
        print(f"Error: {type(e).__name__}: {e}")
        return False

    print(f"Clip seed: {run.clip_seed}")
    print(f"Actions: {len(selection.clips)}, clips: {sum(len(c) for c in selection.clips.values())}")
    print(f"Written to {path}")
    return True


if __name__ == "__main__":
    if not main():
        sys.exit(1)
