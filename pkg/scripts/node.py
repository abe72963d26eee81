#!/usr/bin/env python3
"""Run one protocol node from a JSON config file.

Config schema (see transport.NodeConfig.from_file):

  {
    "node": 0, "n": 4, "f": 1,
    "listen": "127.0.0.1:7100",
    "peers": {"1": "127.0.0.1:7101", "2": "...", "3": "..."},
    "secret": "<hex shared cluster secret>",
    "policy": {"delay_threshold_us": 100000, ...},   # optional overrides
    "data_dir": "/tmp/node0"                          # optional
  }

The process serves until interrupted. With data_dir set, delivered blocks
are appended to <data_dir>/delivered.log as JSON lines.
"""
import argparse

from vidbft import transport


def main():
    parser = argparse.ArgumentParser(description="protocol node")
    parser.add_argument("--config", required=True, help="JSON config path")
    args = parser.parse_args()
    config = transport.NodeConfig.from_file(args.config)
    try:
        transport.serve(config)
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
