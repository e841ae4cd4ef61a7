"""Fault-site enumeration, sampling and injected-trial execution."""
from .engine import RawTrialResult, TrialContext, execute_trial
from .rng import SplitMix64, splitmix64
from .sites import (FIXED, RANDOM, BitPolicy, EmptySiteSpace, FaultMode, FaultSite, FaultSpec,
                    FaultSpecError, NotEnoughSites, SiteSpace, Target, enumerate_sites,
                    sample_faults)
from .campaign import TrialRecord, read_jsonl, run_campaign, trial_seed, write_jsonl
