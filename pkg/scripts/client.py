#!/usr/bin/env python3
"""Submit transactions to a running node, or query its status.

  client.py submit --addr 127.0.0.1:7100 --secret <hex> --file txs.txt
  client.py status --addr 127.0.0.1:7100 --secret <hex>

The submit file holds one transaction per line (UTF-8 bytes, newline
stripped). Status prints the node's admin JSON: delivered-log hash,
epoch positions, retrieval lag, queue length.
"""
import argparse
import asyncio
import json
import sys

from vidbft import transport


def main():
    parser = argparse.ArgumentParser(description="node client")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("submit", "status"):
        p = sub.add_parser(name)
        p.add_argument("--addr", required=True, help="host:port")
        p.add_argument("--secret", required=True, help="hex cluster secret")
        if name == "submit":
            p.add_argument("--file", required=True,
                           help="one transaction per line")
    args = parser.parse_args()
    secret = bytes.fromhex(args.secret)

    if args.command == "status":
        status = asyncio.run(transport.node_status(args.addr, secret))
        json.dump(status, sys.stdout, indent=2)
        print()
        return

    with open(args.file, "rb") as handle:
        txs = [line.rstrip(b"\n") for line in handle if line.strip()]
    accepted, queue_len = asyncio.run(
        transport.submit_txs(args.addr, secret, txs))
    print(f"accepted {accepted}/{len(txs)}, node queue {queue_len}")
    if accepted < len(txs):
        sys.exit(1)


if __name__ == "__main__":
    main()
