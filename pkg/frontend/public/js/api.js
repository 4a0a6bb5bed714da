/** Typed client for the study server's four HTTP endpoints. */
export class ApiError extends Error {
    status;
    constructor(message, status) {
        super(message);
        this.status = status;
        this.name = "ApiError";
    }
}
async function asError(res) {
    let message = `${res.status} ${res.statusText}`;
    try {
        const body = await res.json();
        if (body && typeof body.error === "string")
            message = body.error;
    }
    catch {
        // non-JSON error body; keep the status line
    }
    return new ApiError(message, res.status);
}
export class StudyApi {
    base;
    constructor(base = "") {
        this.base = base;
    }
    async createSession(observer_id, opts = {}) {
        const query = new URLSearchParams({ observer_id });
        if (opts.scenes && opts.scenes.length)
            query.set("scenes", opts.scenes.join(","));
        if (opts.seed !== undefined)
            query.set("seed", String(opts.seed));
        const res = await fetch(`${this.base}/session?${query}`);
        if (!res.ok)
            throw await asError(res);
        return (await res.json());
    }
    /** URL of one lossless view image; side is "left"/"right" as displayed. */
    viewUrl(pair_id, side, index) {
        return `${this.base}/pair/${encodeURIComponent(pair_id)}/${side}/${index}`;
    }
    async submitResponse(payload) {
        const res = await fetch(`${this.base}/response`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        });
        if (!res.ok)
            throw await asError(res);
        return (await res.json());
    }
    /** Raw response CSV plus the count of malformed log lines the server skipped. */
    async fetchExport() {
        const res = await fetch(`${this.base}/export`);
        if (!res.ok)
            throw await asError(res);
        return {
            csv: await res.text(),
            skipped: Number(res.headers.get("X-Skipped-Lines") ?? "0"),
        };
    }
}
