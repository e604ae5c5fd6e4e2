"""Prompt templates for evidence identification (MEI), attack investigation (ACR) and refinement."""

from __future__ import annotations

import json
from typing import Iterable, Sequence

from ..errors import BudgetError, ContaminationError
from ..provgraph import SerializedGraph
from ..segment import default_token_estimator

MEI = "MEI"
ACR = "ACR"
REFINE = "REFINE"

MEI_TEMPLATE = """\
Analyze the command lines and identify all commands related to attacks or highly suspicious malware activity without internet search.

- Command Lines: {cmds}.
- Environment: The command lines are collected on {env}.
- Output Format:
    - Command line 1: [The command line]
      Reason: [Brief description]
    - Command line 2: [The command line]
      Reason: [Brief description]
    - ...
- Summarize All Highly Suspicious Commands:
    - 1. [Command line].
    - 2. [Command line].
    - ...
"""

ACR_TEMPLATE = """\
Inspect the provided provenance graph. Analyze the graph to determine whether it indicates malicious activity. Use only the given information (no external lookup).

- Logs (Graph):
{graph}
- Environment: The logs are collected on {env}
- Guidelines:
    - Provenance: Use knowledge of attack patterns, tools, and techniques to identify IoCs from graph interactions.
    - Attack Narrative: Summarize the attack flow using a kill chain perspective.
    - Tools: Pay attention to specific tools (e.g., Metasploit, Meterpreter, PowerShell).
    - Timeline: Construct a chronological step-by-step description based on graph structure and temporal signals (if available).
    - IoCs: Identify suspicious IPs, domains, processes, and files.
- Output Format:
    - Attack Narrative: A concise paragraph summarizing the attack flow.
    - Key Steps:
        - 1) [Tactic name]: description of the attack step
        - 2) [Tactic name]: description of the attack step
        - ...
    - IoCs:
        - IPs: [Suspicious IPs]
        - Processes: [Suspicious process names]
        - Files: [Suspicious file modifications or deletions]
"""

# Refinement wording is our own; it asks the model to re-check its IoCs against the graph.
REFINE_TEMPLATE = """\
Review the previous investigation of the provenance graph below. Verify every listed IoC against the graph. Remove any IP, process, or file that the graph does not support, and do not add new IoCs without evidence in the graph. Use only the given information (no external lookup).

- Logs (Graph):
{graph}
- Environment: The logs are collected on {env}
- Previous Investigation:
{report}
- Output Format: repeat the same structure (Attack Narrative, Key Steps, IoCs with IPs, Processes, Files).
"""


def format_commands(cmdlines: Sequence[str]) -> str:
    # JSON array: one line, unambiguous quoting of spaces, quotes and newlines
    return json.dumps(list(cmdlines), ensure_ascii=False)


def scan_forbidden(text: str, forbidden: Iterable[str]) -> set[str]:
    """Forbidden tokens found in ``text`` (case-insensitive substring scan)."""
    low = text.lower()
    return {tok for tok in forbidden if tok and tok.lower() in low}


def render_prompt(
    kind: str,
    payload,
    env: str,
    *,
    max_context_tokens: int | None = None,
    forbidden: Iterable[str] = (),
    report_text: str | None = None,
    estimator=default_token_estimator,
) -> str:
    """Fill a template.

    ``payload`` is a list of command lines for MEI and a SerializedGraph (or its
    text) for ACR and REFINE. REFINE also needs ``report_text``.
    """
    if kind == MEI:
        if isinstance(payload, (str, SerializedGraph)) or not all(isinstance(c, str) for c in payload):
            raise TypeError("MEI payload must be a sequence of command-line strings")
        text = MEI_TEMPLATE.format(cmds=format_commands(payload), env=env)
    elif kind in (ACR, REFINE):
        if isinstance(payload, SerializedGraph):
            graph = payload.text
        elif isinstance(payload, str):
            graph = payload
        else:
            raise TypeError(f"{kind} payload must be a serialized graph")
        graph = graph.rstrip("\n")
        if kind == ACR:
            text = ACR_TEMPLATE.format(graph=graph, env=env)
        else:
            if report_text is None:
                raise TypeError("REFINE prompt needs report_text")
            text = REFINE_TEMPLATE.format(graph=graph, env=env, report=report_text.rstrip("\n"))
    else:
        raise ValueError(f"unknown prompt kind {kind!r}")

    hits = scan_forbidden(text, forbidden)
    if hits:
        raise ContaminationError(hits)
    if max_context_tokens is not None:
        est = estimator(text)
        if est > max_context_tokens:
            raise BudgetError(f"{kind} prompt needs ~{est} tokens, context limit is {max_context_tokens}")
    return text
