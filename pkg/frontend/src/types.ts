// Mirrors the curate server API payloads exactly.

export type Verdict = "accepted" | "rejected";

export interface SampleCard {
  sample_id: string;
  object_name: string;
  image_url: string;
  mask_url: string;
  verdict: Verdict | null;
  reason_tag: string;
}

export interface Counts {
  total: number;
  reviewed: number;
  accepted: number;
  rejected: number;
  remaining: number;
}

export interface SampleListing {
  page: number;
  page_size: number;
  total: number;
  counts: Counts;
  reason_tags: string[];
  samples: SampleCard[];
}

export type Filter = "all" | "accepted" | "rejected" | "unreviewed";
