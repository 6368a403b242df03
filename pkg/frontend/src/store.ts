// Pure state container: every transition returns a new State, so the
// render layer can stay a dumb function of the current value and nothing
// client-side survives a reload (the server is the source of truth).

import type { Counts, Filter, SampleCard, SampleListing, Verdict } from "./types.js";

export interface State {
  samples: SampleCard[];
  page: number;
  pageSize: number;
  filteredTotal: number;
  counts: Counts;
  reasonTags: string[];
  filter: Filter;
  overlay: boolean;
  offline: boolean;
  selected: number;
}

export const DEFAULT_REASON_TAGS = ["color saturation", "partial object", "other"];

export function initialState(pageSize = 24): State {
  return {
    samples: [],
    page: 1,
    pageSize,
    filteredTotal: 0,
    counts: { total: 0, reviewed: 0, accepted: 0, rejected: 0, remaining: 0 },
    reasonTags: DEFAULT_REASON_TAGS.slice(),
    filter: "all",
    overlay: true,
    offline: false,
    selected: 0,
  };
}

export function applyListing(state: State, listing: SampleListing, filter: Filter): State {
  return {
    ...state,
    samples: listing.samples,
    page: listing.page,
    pageSize: listing.page_size,
    filteredTotal: listing.total,
    counts: listing.counts,
    reasonTags: listing.reason_tags.length ? listing.reason_tags : state.reasonTags,
    filter,
    offline: false,
    selected: Math.min(state.selected, Math.max(listing.samples.length - 1, 0)),
  };
}

function shiftCounts(counts: Counts, prev: Verdict | null, next: Verdict | null): Counts {
  const out = { ...counts };
  if (prev === next) {
    return out;
  }
  if (prev === null) {
    out.reviewed += 1;
    out.remaining -= 1;
  } else {
    out[prev] -= 1;
  }
  if (next === null) {
    out.reviewed -= 1;
    out.remaining += 1;
  } else {
    out[next] += 1;
  }
  return out;
}

export function setVerdict(
  state: State,
  sampleId: string,
  verdict: Verdict,
  reasonTag: string,
): State {
  const samples = state.samples.map((s) => {
    if (s.sample_id !== sampleId) {
      return s;
    }
    return { ...s, verdict, reason_tag: reasonTag };
  });
  const prev = state.samples.find((s) => s.sample_id === sampleId);
  if (!prev) {
    return state;
  }
  return { ...state, samples, counts: shiftCounts(state.counts, prev.verdict, verdict) };
}

export function revertVerdict(
  state: State,
  sampleId: string,
  previous: { verdict: Verdict | null; reason_tag: string },
): State {
  const current = state.samples.find((s) => s.sample_id === sampleId);
  if (!current) {
    return state;
  }
  const samples = state.samples.map((s) =>
    s.sample_id === sampleId ? { ...s, verdict: previous.verdict, reason_tag: previous.reason_tag } : s,
  );
  return {
    ...state,
    samples,
    counts: shiftCounts(state.counts, current.verdict, previous.verdict),
  };
}

export function setOverlay(state: State, overlay: boolean): State {
  return { ...state, overlay };
}

export function setOffline(state: State, offline: boolean): State {
  return { ...state, offline };
}

export function moveSelection(state: State, delta: number): State {
  if (!state.samples.length) {
    return { ...state, selected: 0 };
  }
  const selected = Math.min(Math.max(state.selected + delta, 0), state.samples.length - 1);
  return { ...state, selected };
}

export function selectedSample(state: State): SampleCard | null {
  return state.samples[state.selected] ?? null;
}

export interface Progress {
  total: number;
  reviewed: number;
  accepted: number;
  rejected: number;
  remaining: number;
}

export function progressSummary(state: State): Progress {
  return { ...state.counts };
}

export function progressConsistent(p: Progress): boolean {
  return p.accepted + p.rejected + p.remaining === p.total && p.accepted + p.rejected === p.reviewed;
}

export function totalPages(state: State): number {
  return Math.max(1, Math.ceil(state.filteredTotal / state.pageSize));
}
