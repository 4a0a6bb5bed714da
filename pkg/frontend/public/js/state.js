/**
 * Pure state for one side-by-side comparison: per-side view cursors,
 * per-side seen-view tracking, and the coverage gate that unlocks the
 * response buttons.  No DOM, no network; main.ts wires it to both.
 */
export const COVERAGE_THRESHOLD = 0.8;
// absorbs float noise in popcount/V so 8-of-10 counts as exactly 80%
const EPS = 1e-9;
export class ViewerState {
    pair;
    cursor = { left: 0, right: 0 };
    seen;
    constructor(pair) {
        if (!Number.isInteger(pair.view_count) || pair.view_count < 1) {
            throw new Error(`bad view_count ${pair.view_count}`);
        }
        this.pair = pair;
        this.seen = {
            left: new Array(pair.view_count).fill(false),
            right: new Array(pair.view_count).fill(false),
        };
    }
    get viewCount() {
        return this.pair.view_count;
    }
    viewIndex(side) {
        return this.cursor[side];
    }
    /** Step the cursor by delta views, clamped to [0, V-1]. */
    sweep(side, delta) {
        const top = this.pair.view_count - 1;
        const next = Math.min(top, Math.max(0, this.cursor[side] + Math.round(delta)));
        this.cursor[side] = next;
        return next;
    }
    /** Map a pointer position (0..1 across the viewer) to a view cursor. */
    sweepTo(side, fraction) {
        const f = Math.min(1, Math.max(0, fraction));
        this.cursor[side] = Math.round(f * (this.pair.view_count - 1));
        return this.cursor[side];
    }
    /** Credit a view as seen once it has actually been displayed. */
    markRendered(side, index) {
        if (index >= 0 && index < this.pair.view_count) {
            this.seen[side][index] = true; // bits only turn on, never off
        }
    }
    seenCount(side) {
        return this.seen[side].reduce((n, b) => n + (b ? 1 : 0), 0);
    }
    coverage(side) {
        return this.seenCount(side) / this.pair.view_count;
    }
    /** Both sides at >= 80% distinct views; mirrors the server-side rule. */
    responseEnabled() {
        const gate = COVERAGE_THRESHOLD - EPS;
        return this.coverage("left") >= gate && this.coverage("right") >= gate;
    }
}
