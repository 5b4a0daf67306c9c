import type { SlicePayload, Verdict } from './types.js';

/**
 * Per-slice review state. Enforces the two workstation contracts:
 * blind-first (the model's class is never revealed before the reviewer's
 * first submission on the slice) and banner blocking (a warning must be
 * resolved by confirm-or-revise before the reviewer can advance).
 */
export class ReviewViewState {
  caseId: string | null = null;
  sliceIndex = 0;
  sliceCount = 0;
  payload: SlicePayload | null = null;
  loadError: string | null = null;
  overlayOn = true;
  submittedClass: number | null = null;
  lastVerdict: Verdict | null = null;
  lastSeq = 0;
  bannerOpen = false;

  beginLoad(caseId: string, index: number): void {
    this.caseId = caseId;
    this.sliceIndex = index;
    this.payload = null;
    this.loadError = null;
    this.submittedClass = null;
    this.lastVerdict = null;
    this.lastSeq = 0;
    this.bannerOpen = false;
  }

  loadSucceeded(payload: SlicePayload): void {
    this.payload = payload;
    this.loadError = null;
    this.sliceCount = payload.slice_count;
    this.lastSeq = payload.seq;
  }

  loadFailed(message: string): void {
    this.payload = null;
    this.loadError = message;
  }

  /** Buttons stay disabled until the slice is loaded and any banner is resolved. */
  get assessmentEnabled(): boolean {
    return this.payload !== null && !this.bannerOpen;
  }

  /** Blind-first: only true once the reviewer has submitted on this slice. */
  get verdictRevealed(): boolean {
    return this.submittedClass !== null;
  }

  get abstained(): boolean {
    return this.payload?.verdict.status === 'abstain';
  }

  /** Caution text for abstained slices; shown before any submission. */
  get cautionMessage(): string | null {
    return this.abstained && this.payload ? this.payload.verdict.message : null;
  }

  /** The model class chip, visible only after the first submission. */
  get revealedClass(): number | null {
    if (!this.verdictRevealed) {
      return null;
    }
    const verdict = this.lastVerdict ?? this.payload?.verdict ?? null;
    return verdict && verdict.status === 'confident' ? verdict.predicted_class ?? null : null;
  }

  get canAdvance(): boolean {
    return !this.bannerOpen;
  }

  recordSubmission(assessedClass: number, verdict: Verdict, seq: number): void {
    this.submittedClass = assessedClass;
    this.lastVerdict = verdict;
    this.lastSeq = seq;
    this.bannerOpen = verdict.warning;
  }

  /** Dismiss-and-confirm: the follow-up confirmation resolves the banner. */
  recordConfirmation(verdict: Verdict, seq: number): void {
    this.lastVerdict = verdict;
    this.lastSeq = seq;
    this.bannerOpen = false;
  }

  /** Revise-my-assessment: reopen the buttons for a replacement submission. */
  beginRevision(): void {
    this.bannerOpen = false;
  }
}
