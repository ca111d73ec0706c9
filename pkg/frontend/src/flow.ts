// Session state machine, independent of the DOM. The view is a sink for
// render states; every percentage it shows comes verbatim from the server.

import { ApiError, StudyApi, SessionReport, TrialItem, Verdict } from "./api.js";

export interface TrialView {
  imageUrl: string;
  index: number;
  total: number;
}

export interface FlowView {
  showStart(): void;
  showLoading(message: string): void;
  showTrial(trial: TrialView): void;
  showReport(report: SessionReport): void;
  showError(message: string, retry: () => void): void;
}

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface FlowOptions {
  api: StudyApi;
  view: FlowView;
  storage: KeyValueStore;
  /** Resolves once the image is fetched; the trial timer starts after this. */
  preload?: (url: string) => Promise<void>;
  now?: () => number;
}

const SESSION_KEY = "waxpad.session";

export class SessionFlow {
  private readonly api: StudyApi;
  private readonly view: FlowView;
  private readonly storage: KeyValueStore;
  private readonly preload: (url: string) => Promise<void>;
  private readonly now: () => number;

  private sessionId: string | null = null;
  private current: TrialItem | null = null;
  private shownAt = 0;
  private submitting = false;

  constructor(options: FlowOptions) {
    this.api = options.api;
    this.view = options.view;
    this.storage = options.storage;
    this.preload = options.preload ?? (() => Promise.resolve());
    this.now = options.now ?? (() => Date.now());
  }

  /** Resume a stored session if one exists; returns false when starting fresh. */
  async resume(): Promise<boolean> {
    const stored = this.storage.getItem(SESSION_KEY);
    if (!stored) return false;
    this.sessionId = stored;
    try {
      await this.advance();
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.storage.removeItem(SESSION_KEY);
        this.sessionId = null;
        return false;
      }
      this.fail(err, () => void this.resume());
      return true; // an error screen is showing; do not double-render start
    }
  }

  async begin(volunteer: string): Promise<void> {
    const name = volunteer.trim();
    if (!name) {
      this.view.showError("Please enter a volunteer name.", () => this.view.showStart());
      return;
    }
    this.view.showLoading("Creating session…");
    try {
      const session = await this.api.createSession(name);
      // Persist only after the server acknowledged: a failed start must not
      // leave a dangling id behind (no duplicate sessions on retry).
      this.sessionId = session.session_id;
      this.storage.setItem(SESSION_KEY, session.session_id);
      await this.advance();
    } catch (err) {
      this.sessionId = null;
      this.fail(err, () => void this.begin(name));
    }
  }

  /** One verdict per trial: calls while a submission is in flight are dropped. */
  async submit(verdict: Verdict): Promise<void> {
    if (this.submitting || !this.sessionId || !this.current) return;
    this.submitting = true;
    const elapsed = this.now() - this.shownAt;
    const face = this.current.face_id;
    try {
      await this.api.submitDecision(this.sessionId, face, verdict, elapsed);
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Duplicate or out of order: trust the server cursor and move on.
        try {
          await this.advance();
        } catch (inner) {
          this.fail(inner, () => void this.advance());
        }
      } else {
        this.fail(err, () => void this.retrySubmit(verdict));
      }
    } finally {
      this.submitting = false;
    }
  }

  private async retrySubmit(verdict: Verdict): Promise<void> {
    this.submitting = false;
    await this.submit(verdict);
  }

  /** Fetch the current item, preload its image, then start the trial clock. */
  private async advance(): Promise<void> {
    if (!this.sessionId) return;
    const item = await this.api.nextItem(this.sessionId);
    if (item.done) {
      this.current = null;
      const report = await this.api.sessionReport(this.sessionId);
      this.storage.removeItem(SESSION_KEY);
      this.view.showReport(report);
      return;
    }
    const imageUrl = this.api.imageUrl(item.image_url);
    await this.preload(imageUrl);
    this.current = item;
    this.shownAt = this.now();
    this.view.showTrial({ imageUrl, index: item.index, total: item.total });
  }

  private fail(err: unknown, retry: () => void): void {
    const message = err instanceof Error ? err.message : String(err);
    this.view.showError(message, retry);
  }
}
