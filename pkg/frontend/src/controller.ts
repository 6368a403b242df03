// Orchestrates API calls against the store with optimistic updates:
// verdicts show immediately and roll back if the POST fails, so no
// verdict ever appears in the UI that the server did not persist.

import type { ApiClient } from "./api.js";
import type { Filter, Verdict } from "./types.js";
import {
  State,
  applyListing,
  revertVerdict,
  setOffline,
  setVerdict,
} from "./store.js";

export type SetState = (next: State) => void;
export type GetState = () => State;

export async function loadPage(
  get: GetState,
  set: SetState,
  api: ApiClient,
  page: number,
  filter: Filter,
): Promise<void> {
  const state = get();
  try {
    const listing = await api.fetchSamples(page, state.pageSize, filter);
    set(applyListing(get(), listing, filter));
  } catch {
    set(setOffline(get(), true));
  }
}

export async function submitVerdict(
  get: GetState,
  set: SetState,
  api: ApiClient,
  sampleId: string,
  verdict: Verdict,
  reasonTag: string,
): Promise<boolean> {
  const before = get().samples.find((s) => s.sample_id === sampleId);
  if (!before) {
    return false;
  }
  const previous = { verdict: before.verdict, reason_tag: before.reason_tag };
  set(setVerdict(get(), sampleId, verdict, reasonTag));
  try {
    await api.postVerdict(sampleId, verdict, reasonTag);
    set(setOffline(get(), false));
    return true;
  } catch {
    set(setOffline(revertVerdict(get(), sampleId, previous), true));
    return false;
  }
}
